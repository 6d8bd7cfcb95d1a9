fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(soncoord::cli::dispatch(&argv));
}
