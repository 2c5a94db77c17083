# Cryptographic primitives
