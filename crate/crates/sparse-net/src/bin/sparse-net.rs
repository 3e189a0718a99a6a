fn main() -> std::process::ExitCode {
    sparse_net::cli::run(std::env::args_os())
}
