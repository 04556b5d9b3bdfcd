#include <stdio.h>
#include <stdlib.h>
#include <string.h>

char *get_welcome_message(const char *username) {
    size_t len = strlen(username) + strlen("Welcome, !") + 1;
    char *message = malloc(len);
    if (message == NULL) {
        return NULL;
    }
    snprintf(message, len, "Welcome, %s!", username);
    return message;
}
