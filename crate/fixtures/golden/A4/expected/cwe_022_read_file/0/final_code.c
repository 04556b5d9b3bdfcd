#include <limits.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

char *read_file_from_dir(const char *filename, const char *dir_path) {
    char dir_real[PATH_MAX];
    char file_real[PATH_MAX];
    char path[PATH_MAX];
    if (filename == NULL || dir_path == NULL || filename[0] == '/') {
        return strdup("");
    }
    if (realpath(dir_path, dir_real) == NULL) {
        return strdup("");
    }
    if (snprintf(path, sizeof(path), "%s/%s", dir_real, filename) >= (int)sizeof(path)) {
        return strdup("");
    }
    if (realpath(path, file_real) == NULL) {
        return strdup("");
    }
    size_t dir_len = strlen(dir_real);
    if (strncmp(file_real, dir_real, dir_len) != 0 || file_real[dir_len] != '/') {
        return strdup("");
    }
    FILE *f = fopen(file_real, "rb");
    if (f == NULL) {
        return strdup("");
    }
    size_t cap = 256, len = 0;
    char *buf = malloc(cap);
    if (buf == NULL) {
        fclose(f);
        return strdup("");
    }
    int c;
    while ((c = fgetc(f)) != EOF) {
        if (len + 1 >= cap) {
            char *grown = realloc(buf, cap * 2);
            if (grown == NULL) {
                free(buf);
                fclose(f);
                return strdup("");
            }
            buf = grown;
            cap *= 2;
        }
        buf[len++] = (char)c;
    }
    buf[len] = '\0';
    fclose(f);
    return buf;
}