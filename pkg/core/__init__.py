# Numerical core: continued fractions, Ostrowski numeration, skew products, Möbius statistics
