fn main() {
    std::process::exit(thegcn::cli::main_entry());
}
