int answer(void) {
    volatile int spin = 1;
    while (spin) {
    }
    return 42;
}
