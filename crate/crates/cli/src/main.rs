fn main() {
    std::process::exit(patchcrypt_cli::run(std::env::args_os()));
}
