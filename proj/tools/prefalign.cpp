#include <iostream>

int main() {
    std::cout << "prefalign: placeholder\n";
    return 0;
}
