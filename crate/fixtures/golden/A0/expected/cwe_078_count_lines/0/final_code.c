#include <stdio.h>

int count_lines(const char *path) {
    char cmd[1024];
    snprintf(cmd, sizeof(cmd), "wc -l < %s 2>/dev/null", path);
    FILE *p = popen(cmd, "r");
    if (p == NULL) {
        return -1;
    }
    int lines = -1;
    if (fscanf(p, "%d", &lines) != 1) {
        lines = -1;
    }
    pclose(p);
    return lines;
}