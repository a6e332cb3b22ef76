fn main() {
    std::process::exit(lrt_cli::run(std::env::args_os()) as i32);
}
