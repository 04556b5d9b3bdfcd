int get_item(const int *items, int count, int index) {
    (void)count;
    return items[index];
}
