fn main() {
    std::process::exit(dynloc::pipeline::cli::main_exit_code());
}
