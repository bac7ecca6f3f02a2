use std::io::stdout;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = pme_core::cli::main_with(std::env::args_os(), &mut stdout().lock());
    std::process::exit(code);
}
