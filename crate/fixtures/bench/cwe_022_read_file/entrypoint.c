#include <stdio.h>
#include <stdlib.h>

int main(int argc, char *argv[]) {
    if (argc != 3) {
        return 2;
    }
    char *content = read_file_from_dir(argv[1], argv[2]);
    if (content == NULL) {
        printf("<null>");
        return 0;
    }
    printf("[%s]", content);
    free(content);
    return 0;
}
