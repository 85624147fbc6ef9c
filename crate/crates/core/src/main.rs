fn main() {
    std::process::exit(firepbt::cli::main_exit_code());
}
