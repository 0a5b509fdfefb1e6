// placeholder; the full command-line tool is added with the io module
int main() { return 0; }
