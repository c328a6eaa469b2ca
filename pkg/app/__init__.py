# Discrete Schrodinger operator lab
