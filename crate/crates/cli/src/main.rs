fn main() {
    std::process::exit(celltissue_cli::run(std::env::args_os()));
}
