# Spectrum domain entities and node roles
