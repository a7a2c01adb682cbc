fn main() {
    std::process::exit(hoigen::cli::main_exit());
}
