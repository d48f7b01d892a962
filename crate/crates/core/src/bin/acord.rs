fn main() -> std::process::ExitCode {
    acord::cli::main()
}
