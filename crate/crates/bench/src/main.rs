fn main() {
    std::process::exit(quancurrent_bench::cli::run(std::env::args_os()));
}
