fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VESSEL3D_LOG", "info"))
        .format_timestamp(None)
        .init();
    std::process::exit(vessel3d_cli::run(std::env::args_os()));
}
