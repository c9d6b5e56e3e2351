import { createApp } from "./app";
import "./style.css";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

createApp(root, { baseUrl: import.meta.env.VITE_API_BASE ?? "" });
