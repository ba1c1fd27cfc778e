fn main() -> std::process::ExitCode {
    i3net_cli::app::main()
}
