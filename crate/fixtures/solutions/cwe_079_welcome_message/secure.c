#include <stdio.h>
#include <stdlib.h>
#include <string.h>

char *get_welcome_message(const char *username) {
    size_t len = strlen("Welcome, !") + 1;
    for (const char *p = username; *p; p++) {
        switch (*p) {
        case '&': len += 5; break;
        case '<': case '>': len += 4; break;
        case '"': case '\'': len += 6; break;
        default: len += 1;
        }
    }
    char *message = malloc(len);
    if (message == NULL) {
        return NULL;
    }
    char *out = message;
    out += sprintf(out, "Welcome, ");
    for (const char *p = username; *p; p++) {
        switch (*p) {
        case '&': out += sprintf(out, "&amp;"); break;
        case '<': out += sprintf(out, "&lt;"); break;
        case '>': out += sprintf(out, "&gt;"); break;
        case '"': out += sprintf(out, "&quot;"); break;
        case '\'': out += sprintf(out, "&#x27;"); break;
        default: *out++ = *p;
        }
    }
    sprintf(out, "!");
    return message;
}
