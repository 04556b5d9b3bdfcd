#include <stddef.h>

int get_item(const int *items, int count, int index) {
    if (items == NULL || index < 0 || index >= count) {
        return -1;
    }
    return items[index];
}