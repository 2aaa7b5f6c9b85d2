fn main() { println!("cdisent"); }
