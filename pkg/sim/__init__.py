# Numerical engine for tunnelscope
