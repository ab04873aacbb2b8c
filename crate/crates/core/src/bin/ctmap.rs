use std::io;
use std::process;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = ctmap::cli::run(std::env::args_os(), &mut io::stdout().lock());
    process::exit(code);
}
