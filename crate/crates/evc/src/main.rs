fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = evc::cli::run(&args) {
        eprintln!("evc: {e}");
        std::process::exit(e.exit_code());
    }
}
