#include <stdio.h>
#include <string.h>

#include "adiadio.h"

int main(void) {
    AdiadioPolynomial *p = NULL;
    if (adiadio_polynomial_parse("(x+1)^2 + (y+1)^2 - (z+1)^2", &p) != ADIADIO_STATUS_OK) {
        fprintf(stderr, "parse: %s\n", adiadio_last_error_message());
        return 1;
    }
    uint64_t root[3] = {2, 3, 4};
    char *value = NULL;
    if (adiadio_polynomial_evaluate(p, root, 3, &value) != ADIADIO_STATUS_OK || strcmp(value, "0") != 0) {
        return 2;
    }
    adiadio_string_free(value);

    uint64_t bounds[3] = {6, 6, 6};
    size_t count = 0;
    if (adiadio_oracle_count(p, bounds, 3, 1000000, &count) != ADIADIO_STATUS_OK || count != 2) {
        return 3;
    }
    adiadio_polynomial_free(p);

    AdiadioPolynomial *bad = NULL;
    if (adiadio_polynomial_parse("x +", &bad) != ADIADIO_STATUS_PARSE || bad != NULL) {
        return 4;
    }
    printf("%s ok\n", adiadio_version());
    return 0;
}
