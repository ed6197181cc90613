fn main() {
    std::process::exit(eegcpd_cli::run(std::env::args_os()));
}
