fn main() {
    std::process::exit(vc_adv::cli::run(std::env::args_os()));
}
