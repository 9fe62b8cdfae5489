fn main() -> std::process::ExitCode {
    apnp_core::cli::run()
}
