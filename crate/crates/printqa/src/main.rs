fn main() -> std::process::ExitCode {
    printqa::cli::main()
}
