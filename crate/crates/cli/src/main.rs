fn main() {
    println!("otreg");
}
