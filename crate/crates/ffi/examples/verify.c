/* Build: cc verify.c -I../include ../../../target/release/libzonotrain_ffi.a -lm -lpthread -ldl */
#include <stdio.h>
#include "zonotrain.h"

int main(void) {
    const char *net_json =
        "{\"layers\":[{\"W\":[[1.0,0.0],[0.0,1.0]],\"w\":[0.0,0.0]}]}";
    double c[2] = {0.0, 0.0}, g[4] = {1.0, 0.0, 0.0, 1.0};
    double cu[2] = {1.5, 1.5}, gu[4] = {0.5, 0.0, 0.0, 0.5};
    ZtNetwork *net = NULL;
    ZtZonotope *x0 = NULL, *unsafe_set = NULL;
    int safe = -1;
    double loss = 0.0;

    if (zt_network_from_json(net_json, &net) != ZT_STATUS_OK ||
        zt_cz_new(2, 2, 0, c, g, NULL, NULL, &x0) != ZT_STATUS_OK ||
        zt_cz_new(2, 2, 0, cu, gu, NULL, NULL, &unsafe_set) != ZT_STATUS_OK) {
        fprintf(stderr, "error: %s\n", zt_last_error_message());
        return 2;
    }
    const ZtZonotope *sets[1] = {unsafe_set};
    if (zt_verify(net, x0, sets, 1, &safe, &loss) != ZT_STATUS_OK) {
        fprintf(stderr, "error: %s\n", zt_last_error_message());
        return 2;
    }
    printf("%s (max constraint loss %.6f)\n", safe ? "safe" : "unsafe", loss);
    zt_cz_free(unsafe_set);
    zt_cz_free(x0);
    zt_network_free(net);
    return safe ? 0 : 1;
}
