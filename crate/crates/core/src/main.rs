fn main() -> std::process::ExitCode {
    latent_logit::cli::main()
}
