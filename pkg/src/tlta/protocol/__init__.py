"""Message vocabulary and network-side entities."""
