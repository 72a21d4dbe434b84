// modules to come
