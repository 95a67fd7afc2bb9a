fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(fbm_lab::cli::dispatch(&args[1..]));
}
