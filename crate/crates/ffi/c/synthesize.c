/* Reads a problem JSON file, synthesizes a policy and checks it by
 * closed-loop simulation.
 *
 *   cc -I include c/synthesize.c path/to/libccmpc_ffi.a -lm -lpthread -ldl -o synthesize
 *   ./synthesize problem.json [runs]
 *
 * Exit status: 0 optimal, 2 infeasible or iteration limit, 1 error. */
#include <stdio.h>
#include <stdlib.h>

#include "ccmpc.h"

static int report(const char *what, CcmpcError rc) {
    const char *msg = ccmpc_last_error_message();
    fprintf(stderr, "%s failed (code %d): %s\n", what, (int)rc, msg ? msg : "");
    return 1;
}

static char *slurp(const char *path) {
    FILE *f = fopen(path, "rb");
    if (!f) return NULL;
    fseek(f, 0, SEEK_END);
    long len = ftell(f);
    rewind(f);
    char *buf = malloc((size_t)len + 1);
    if (buf && fread(buf, 1, (size_t)len, f) != (size_t)len) {
        free(buf);
        buf = NULL;
    }
    if (buf) buf[len] = '\0';
    fclose(f);
    return buf;
}

int main(int argc, char **argv) {
    if (argc < 2) {
        fprintf(stderr, "usage: %s problem.json [runs]\n", argv[0]);
        return 1;
    }
    size_t runs = argc > 2 ? (size_t)strtoul(argv[2], NULL, 10) : 1000;
    char *json = slurp(argv[1]);
    if (!json) {
        perror(argv[1]);
        return 1;
    }

    CcmpcProblem *problem = NULL;
    CcmpcSynthesis *syn = NULL;
    CcmpcPolicy *policy = NULL;
    int code = 1;
    CcmpcError rc = ccmpc_problem_from_json(json, &problem);
    free(json);
    if (rc != CCMPC_ERROR_OK) return report("parse", rc);

    if ((rc = ccmpc_synthesize(problem, &syn)) != CCMPC_ERROR_OK) {
        code = report("synthesize", rc);
        goto done;
    }
    CcmpcSolveSummary s;
    ccmpc_synthesis_summary(syn, &s);
    printf("status=%d objective=%.10g kkt=%.3g slack=%.6g\n", (int)s.status, s.objective_value, s.kkt_residual,
           s.phase1_slack);
    if (s.status != CCMPC_STATUS_OPTIMAL) {
        code = 2;
        goto done;
    }

    size_t len = 0;
    ccmpc_synthesis_policy(syn, &policy);
    ccmpc_policy_theta(policy, NULL, 0, &len);
    double *theta = malloc(len * sizeof(double));
    if ((rc = ccmpc_policy_theta(policy, theta, len, &len)) != CCMPC_ERROR_OK) {
        free(theta);
        code = report("theta", rc);
        goto done;
    }
    printf("theta[%zu] first=%.10g\n", len, len ? theta[0] : 0.0);
    free(theta);

    CcmpcViolation v;
    if ((rc = ccmpc_simulate(problem, policy, runs, 1, &v)) != CCMPC_ERROR_OK) {
        code = report("simulate", rc);
        goto done;
    }
    printf("violations=%zu/%zu ci=[%.4g, %.4g]\n", v.violations, v.runs, v.ci_low, v.ci_high);
    code = 0;

done:
    ccmpc_policy_free(policy);
    ccmpc_synthesis_free(syn);
    ccmpc_problem_free(problem);
    return code;
}
