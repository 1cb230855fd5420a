#include <stdio.h>
#include "vnfactor.h"

int main(void) {
    char *k = NULL;
    if (vn_k_constant(3, &k) != VN_STATUS_OK) return 1;
    printf("%s\n", k);
    vn_string_free(k);

    VnChain *chain = NULL;
    VnStatus s = vn_halperin("q", "1/3", 1, 27720, 0, &chain);
    if (s != VN_STATUS_OK) return 2;
    uint64_t p = 0, q = 0;
    if (vn_chain_stage(chain, 1, &p, &q) != VN_STATUS_OK) return 3;
    printf("%llu/%llu %d\n", (unsigned long long)p, (unsigned long long)q, vn_chain_all_hold(chain));
    vn_chain_free(chain);

    s = vn_halperin("q", "1/3", 1, 30, 0, &chain);
    printf("%d %s\n", (int)s, vn_last_error());
    return s == VN_STATUS_INFEASIBLE ? 0 : 4;
}
