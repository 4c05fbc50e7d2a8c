// Placeholder entry point; subcommands land with the experiment runner.
int main() { return 0; }
