#include <stdio.h>
#include <stdlib.h>

static const struct {
    int before;
    int items[5];
    int after;
} data = {777, {10, 20, 30, 40, 50}, 777};

int main(int argc, char *argv[]) {
    if (argc != 2) {
        return 2;
    }
    printf("%d\n", get_item(data.items, 5, atoi(argv[1])));
    return 0;
}
