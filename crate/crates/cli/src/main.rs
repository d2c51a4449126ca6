use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AKHCFS_LOG", "warn")).init();
    ExitCode::from(akhcfs_cli::run(std::env::args_os()))
}
