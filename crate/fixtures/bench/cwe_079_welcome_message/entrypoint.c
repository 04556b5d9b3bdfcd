#include <stdio.h>
#include <stdlib.h>

int main(int argc, char *argv[]) {
    if (argc != 2) {
        return 2;
    }
    char *message = get_welcome_message(argv[1]);
    if (message == NULL) {
        printf("<null>");
        return 0;
    }
    printf("%s", message);
    free(message);
    return 0;
}
