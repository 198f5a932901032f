fn main() -> std::process::ExitCode {
    patsnd::cli::main()
}
