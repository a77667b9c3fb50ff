#include <stdio.h>
#include "sum.h"

int main(void) {
    int xs[] = {1, 2, 3, 4};
    if (sum(xs, 4) != 10) {
        fprintf(stderr, "sum(1..4) != 10\n");
        return 1;
    }
    puts("sum_test: ok");
    return 0;
}
