fn main() {
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    let code = modelcmp_server::cli::run(std::env::args_os(), &mut out, &mut err);
    std::process::exit(code);
}
