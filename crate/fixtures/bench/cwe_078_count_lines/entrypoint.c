#include <stdio.h>

int main(int argc, char *argv[]) {
    if (argc != 2) {
        return 2;
    }
    printf("%d\n", count_lines(argv[1]));
    return 0;
}
