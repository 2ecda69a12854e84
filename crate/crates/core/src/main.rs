fn main() {
    let (code, _) = setgen::cli::execute(std::env::args_os());
    std::process::exit(code);
}
