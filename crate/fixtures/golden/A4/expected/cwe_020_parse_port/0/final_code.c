#include <ctype.h>
#include <errno.h>
#include <stdlib.h>

int parse_port(const char *text) {
    if (text == NULL || !isdigit((unsigned char)text[0])) {
        return -1;
    }
    char *end = NULL;
    errno = 0;
    long port = strtol(text, &end, 10);
    if (errno != 0 || *end != '\0' || port < 1 || port > 65535) {
        return -1;
    }
    return (int)port;
}