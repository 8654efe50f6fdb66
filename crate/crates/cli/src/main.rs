fn main() {
    std::process::exit(drcdt_cli::run(std::env::args_os()));
}
