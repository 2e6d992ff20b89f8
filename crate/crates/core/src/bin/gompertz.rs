fn main() {
    std::process::exit(gompertz_diffusion::cli::main_with_args(std::env::args_os()));
}
