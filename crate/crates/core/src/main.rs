fn main() -> std::process::ExitCode {
    cswc::cli::main()
}
