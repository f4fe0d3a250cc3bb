//! The generated header declares every exported symbol and a C program
//! built against it links and runs.

use std::path::{Path, PathBuf};
use std::process::Command;

use ccmpc::problem::{ConstraintSpec, CostSpec, Method, NoiseSpec, PolytopicSpec, ProblemSpec, RelaxationSpec, SystemSpec};

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn exported_symbols() -> Vec<String> {
    let src = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let mut names = Vec::new();
    let mut next = false;
    for line in src.lines() {
        if line.trim() == "#[no_mangle]" {
            next = true;
        } else if next {
            let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
            names.push(name.trim().to_owned());
            next = false;
        }
    }
    names
}

fn compiler() -> Option<String> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    Command::new(&cc).arg("--version").output().ok().filter(|o| o.status.success()).map(|_| cc)
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/ccmpc.h")).unwrap();
    let names = exported_symbols();
    assert!(names.len() >= 15, "found {names:?}");
    for name in names {
        assert!(header.contains(&format!("{name}(")), "{name} missing from the header");
    }
    for ty in ["CcmpcProblem", "CcmpcSynthesis", "CcmpcPolicy"] {
        assert!(header.contains(&format!("typedef struct {ty} {ty};")), "{ty} is not opaque");
    }
    assert!(header.contains("CCMPC_ERROR_OK = 0"));
    assert!(header.contains("CCMPC_STATUS_INFEASIBLE = 1"));
}

/// The static library next to this test binary (target/<profile>/).
fn static_lib() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let dir = exe.parent().and_then(Path::parent).unwrap();
    dir.join("libccmpc_ffi.a")
}

fn problem_file(dir: &Path) -> PathBuf {
    let spec = ProblemSpec {
        schema_version: ccmpc::problem::SCHEMA_VERSION,
        system: SystemSpec::Discrete { a: vec![vec![1.0]], b: vec![vec![1.0]] },
        horizon: 3,
        noise: NoiseSpec::Sigma2(0.04),
        x0: vec![1.0],
        cost: CostSpec::Stationary { q: vec![vec![1.0]], r: vec![vec![0.1]], q_final: None },
        constraints: vec![ConstraintSpec {
            name: None,
            polytopic: Some(PolytopicSpec { tx: vec![vec![0.0, 0.0, 0.0, -1.0]], tu: vec![], y: vec![-0.2] }),
            ellipsoidal: None,
            relaxation: RelaxationSpec::with_alpha(Method::Separation, 0.1),
        }],
        solver: Default::default(),
    };
    let path = dir.join("problem.json");
    std::fs::write(&path, spec.to_json()).unwrap();
    path
}

#[test]
fn c_example_builds_and_runs() {
    let Some(cc) = compiler() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let lib = static_lib();
    assert!(lib.exists(), "{} was not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("synthesize");
    let build = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-I"])
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("c/synthesize.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));

    let run = Command::new(&exe).arg(problem_file(dir.path())).arg("500").output().unwrap();
    let out = String::from_utf8_lossy(&run.stdout);
    assert_eq!(run.status.code(), Some(0), "{out}\n{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.starts_with("status=0 "), "{out}");
    assert!(out.contains("theta[6]"), "{out}");
    assert!(out.contains("/500 "), "{out}");

    let missing = Command::new(&exe).arg(dir.path().join("absent.json")).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
}
