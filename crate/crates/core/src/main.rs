fn main() {
    std::process::exit(dyncode_lens::cli::main(std::env::args_os()));
}
