fn main() -> std::process::ExitCode {
    ledgernet::cli::main()
}
