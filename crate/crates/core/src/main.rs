fn main() {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("POSTCOND_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .init();
    std::process::exit(postcond_core::cli::cli_dispatch(std::env::args_os()));
}
