fn main() {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = fock_transformer::cli::cli_main(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock());
    std::process::exit(code);
}
